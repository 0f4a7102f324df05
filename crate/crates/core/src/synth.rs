//! Seeded synthetic long-tailed benchmarks with planted co-occurrence
//! structure.
//!
//! A benchmark is built from scenarios. Each scenario has an object, a core
//! action present in every pair it generates and a few optional actions
//! included independently with their own probabilities. Every image draws a
//! single scenario from a Zipf law over scenario ranks, so:
//!
//! * optional actions of a scenario overlap with each other,
//! * an optional action seen only in scenarios with the same core has that
//!   core as a prerequisite,
//! * two actions that share no scenario never co-occur (planted exclusion).
//!
//! Features are the sum of per-action prototype vectors plus Gaussian noise.
//! Training labels can be dropped at random to mimic missing annotations;
//! the test split keeps complete labels.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(cfg.seed)`. Stream 0 draws the planted structure, stream
//! `1 + k` draws training image `k` and stream `2^32 + k` test image `k`.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cooc::build_cooc;
use crate::corpus::{ActionSet, AnnotationCorpus, CandidatePair, HoiClass, ImageRecord, LabelSpace};
use crate::error::{AcpError, Result};
use crate::io::write_atomic;

const TEST_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_actions: usize,
    pub n_objects: usize,
    pub n_scenarios: usize,
    /// Training images.
    pub images: usize,
    pub test_images: usize,
    pub zipf_exponent: f64,
    /// Equal scenario weights instead of the Zipf law.
    pub uniform: bool,
    pub max_pairs_per_image: usize,
    pub max_optional: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub label_drop_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_actions: 20,
            n_objects: 4,
            n_scenarios: 96,
            images: 2000,
            test_images: 500,
            zipf_exponent: 1.2,
            uniform: false,
            max_pairs_per_image: 1,
            max_optional: 1,
            feature_dim: 32,
            noise_sigma: 0.35,
            label_drop_rate: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_actions", self.n_actions),
            ("n_objects", self.n_objects),
            ("n_scenarios", self.n_scenarios),
            ("images", self.images),
            ("max_pairs_per_image", self.max_pairs_per_image),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(AcpError::validation("synth config", format!("{name} must be positive")));
        }
        if self.n_actions < 2 {
            return Err(AcpError::validation("synth config", "need at least two actions"));
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent <= 0.0 {
            return Err(AcpError::validation("synth config", "zipf_exponent must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_drop_rate) {
            return Err(AcpError::validation("synth config", "label_drop_rate must be in [0, 1)"));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(AcpError::validation("synth config", "noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionalAction {
    pub action: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub object: usize,
    pub core: usize,
    pub optional: Vec<OptionalAction>,
    /// Normalized sampling weight.
    pub weight: f64,
}

impl Scenario {
    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.core).chain(self.optional.iter().map(|o| o.action))
    }

    /// Probability that a pair drawn from this scenario carries `action`.
    pub fn inclusion_prob(&self, action: usize) -> f64 {
        if action == self.core {
            1.0
        } else {
            self.optional.iter().find(|o| o.action == action).map_or(0.0, |o| o.prob)
        }
    }
}

/// Ground-truth structure a benchmark was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub scenarios: Vec<Scenario>,
    pub prototypes: Vec<Vec<f64>>,
    /// Action pairs `(i, j)`, `i < j`, that share no scenario.
    pub exclusion_pairs: Vec<(usize, usize)>,
    /// `(b, a)`: every scenario containing `b` has core `a`.
    pub prerequisite_pairs: Vec<(usize, usize)>,
}

impl Planted {
    /// Expected positives per pair for every HOI class of `space`.
    pub fn expected_class_rates(&self, space: &LabelSpace) -> Vec<f64> {
        space
            .hoi_classes()
            .iter()
            .map(|c| {
                self.scenarios
                    .iter()
                    .filter(|s| s.object == c.object)
                    .map(|s| s.weight * s.inclusion_prob(c.action))
                    .sum()
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("planted structure serializes");
        write_atomic(path, text.as_bytes())
    }
}

pub struct SynthBenchmark {
    pub train: AnnotationCorpus,
    pub test: AnnotationCorpus,
    pub planted: Planted,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn plant(cfg: &SynthConfig) -> Planted {
    let mut rng = stream_rng(cfg.seed, 0);
    let n = cfg.n_actions;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // A quarter of the actions are never a core. They become modifiers, each
    // owned by a single scenario so it is planted as a prerequisite of that
    // scenario's core.
    let n_cores = cfg.n_scenarios.min(n - n / 4);
    let (cores, modifiers) = perm.split_at(n_cores);
    let owners: Vec<usize> = modifiers.iter().map(|_| rng.random_range(0..cfg.n_scenarios)).collect();

    let raw_weights: Vec<f64> = (0..cfg.n_scenarios)
        .map(|s| {
            if cfg.uniform {
                1.0
            } else {
                1.0 / ((s + 1) as f64).powf(cfg.zipf_exponent)
            }
        })
        .collect();
    let total: f64 = raw_weights.iter().sum();

    let scenarios: Vec<Scenario> = (0..cfg.n_scenarios)
        .map(|s| {
            let core = cores[s % n_cores];
            let mut shared: Vec<usize> = cores.iter().copied().filter(|&a| a != core).collect();
            shared.shuffle(&mut rng);
            let n_shared = rng.random_range(0..=cfg.max_optional.min(shared.len()));
            let owned = modifiers.iter().zip(&owners).filter(|(_, &o)| o == s).map(|(&m, _)| m);
            let mut optional: Vec<OptionalAction> = shared[..n_shared]
                .iter()
                .copied()
                .chain(owned)
                .map(|action| OptionalAction {
                    action,
                    prob: rng.random_range(0.2..0.7),
                })
                .collect();
            optional.sort_by_key(|o| o.action);
            Scenario {
                object: s % cfg.n_objects,
                core,
                optional,
                weight: raw_weights[s] / total,
            }
        })
        .collect();

    let scale = 1.0 / (cfg.feature_dim as f64).sqrt();
    let prototypes = (0..n)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect()
        })
        .collect();

    let sets: Vec<BTreeSet<usize>> = scenarios.iter().map(|s| s.actions().collect()).collect();
    let mut exclusion_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !sets.iter().any(|s| s.contains(&i) && s.contains(&j)) {
                exclusion_pairs.push((i, j));
            }
        }
    }
    let mut prerequisite_pairs = Vec::new();
    for b in 0..n {
        let containing: Vec<&Scenario> = scenarios.iter().filter(|s| s.actions().any(|a| a == b)).collect();
        let Some(first) = containing.first() else { continue };
        let a = first.core;
        if a != b && containing.iter().all(|s| s.core == a) {
            prerequisite_pairs.push((b, a));
        }
    }

    Planted {
        scenarios,
        prototypes,
        exclusion_pairs,
        prerequisite_pairs,
    }
}

fn label_space(cfg: &SynthConfig, planted: &Planted) -> LabelSpace {
    let mut classes = BTreeSet::new();
    for s in &planted.scenarios {
        for a in s.actions() {
            classes.insert((s.object, a));
        }
    }
    LabelSpace::new(
        (0..cfg.n_actions).map(|a| format!("act{a:02}")).collect(),
        (0..cfg.n_objects).map(|o| format!("obj{o}")).collect(),
        classes
            .into_iter()
            .map(|(object, action)| HoiClass { action, object })
            .collect(),
    )
    .expect("generated label space is valid")
}

fn image(
    cfg: &SynthConfig,
    planted: &Planted,
    picker: &WeightedIndex<f64>,
    id: String,
    stream: u64,
    drop_rate: f64,
) -> ImageRecord {
    let mut rng = stream_rng(cfg.seed, stream);
    let scenario = &planted.scenarios[picker.sample(&mut rng)];
    let n_pairs = rng.random_range(1..=cfg.max_pairs_per_image);
    let pairs = (0..n_pairs)
        .map(|_| {
            let mut actions: Vec<usize> = vec![scenario.core];
            for o in &scenario.optional {
                if rng.random::<f64>() < o.prob {
                    actions.push(o.action);
                }
            }
            let mut feature: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * cfg.noise_sigma)
                .collect();
            for &a in &actions {
                for (f, p) in feature.iter_mut().zip(&planted.prototypes[a]) {
                    *f += p;
                }
            }
            let gt_actions: ActionSet = actions
                .into_iter()
                .filter(|_| drop_rate == 0.0 || rng.random::<f64>() >= drop_rate)
                .collect();
            CandidatePair {
                human_conf: rng.random_range(0.6..=1.0),
                object_conf: rng.random_range(0.6..=1.0),
                object: scenario.object,
                gt_actions,
                feature,
            }
        })
        .collect();
    ImageRecord { id, pairs }
}

/// Draws a benchmark. A pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBenchmark> {
    cfg.validate()?;
    let planted = plant(cfg);
    let space = label_space(cfg, &planted);
    let weights: Vec<f64> = planted.scenarios.iter().map(|s| s.weight).collect();
    let picker = WeightedIndex::new(&weights).expect("positive scenario weights");

    let train_images = (0..cfg.images)
        .map(|k| image(cfg, &planted, &picker, format!("train_{k:05}"), 1 + k as u64, cfg.label_drop_rate))
        .collect();
    let test_images = (0..cfg.test_images)
        .map(|k| image(cfg, &planted, &picker, format!("test_{k:05}"), TEST_STREAM_BASE + k as u64, 0.0))
        .collect();
    Ok(SynthBenchmark {
        train: AnnotationCorpus::new(space.clone(), train_images)?,
        test: AnnotationCorpus::new(space, test_images)?,
        planted,
    })
}

/// Agreement between the planted structure and the empirical statistics of
/// a generated corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantedReport {
    pub exclusions_checked: usize,
    /// Planted exclusions with a non-zero empirical conditional.
    pub exclusion_violations: Vec<(usize, usize)>,
    pub prerequisites_checked: usize,
    /// Planted prerequisites `(b, a)` with a valid row `b` and `c(b, a) < 1`.
    /// Expected only when labels are dropped.
    pub prerequisite_violations: Vec<(usize, usize)>,
    /// Planted co-occurring pairs observed together at least once; all have
    /// positive conditionals in both directions.
    pub cooccurrences_observed: usize,
    pub cooccurrence_violations: Vec<(usize, usize)>,
}

impl PlantedReport {
    pub fn is_consistent(&self) -> bool {
        self.exclusion_violations.is_empty() && self.cooccurrence_violations.is_empty()
    }
}

pub fn planted_vs_empirical(corpus: &AnnotationCorpus, planted: &Planted) -> Result<PlantedReport> {
    let n = corpus.label_space().n_actions();
    let sets = corpus.action_occurrence_sets(None);
    let pair = build_cooc(&sets, n)?;
    let mut report = PlantedReport::default();

    for &(i, j) in &planted.exclusion_pairs {
        report.exclusions_checked += 1;
        if pair.c(i, j) != 0.0 || pair.c(j, i) != 0.0 {
            report.exclusion_violations.push((i, j));
        }
    }
    for &(b, a) in &planted.prerequisite_pairs {
        if !pair.row_valid()[b] {
            continue;
        }
        report.prerequisites_checked += 1;
        if pair.c(b, a) != 1.0 {
            report.prerequisite_violations.push((b, a));
        }
    }
    let excluded: BTreeSet<(usize, usize)> = planted.exclusion_pairs.iter().copied().collect();
    for i in 0..n {
        for j in i + 1..n {
            if excluded.contains(&(i, j)) {
                continue;
            }
            let together = sets.iter().any(|s| s.contains(&i) && s.contains(&j));
            if together {
                report.cooccurrences_observed += 1;
                if !(pair.c(i, j) > 0.0 && pair.c(j, i) > 0.0) {
                    report.cooccurrence_violations.push((i, j));
                }
            }
        }
    }
    Ok(report)
}
