//! Per-class average precision and split mAP.
//!
//! Evaluation ranks candidate pairs by their HOI score per class: a pair is
//! a positive for class `(a, o)` when its object is `o` and `a` is among its
//! labels. This is label-ranking AP over candidate pairs, not box-matching
//! detection AP. Rare classes are those with fewer than `threshold` positives
//! in the training corpus; classes without test positives have no AP and are
//! left out of every mean.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::ActionGroups;
use crate::cooc::CoocBank;
use crate::corpus::{AnnotationCorpus, CandidatePair, ClassFrequencies, LabelSpace};
use crate::error::{AcpError, Result};
use crate::objective::{joint_hoi, HoiProbs, LossWeights};
use crate::predictor::{forward, ArchKind, ModelParams};
use crate::projection::{postprocess, ProjectionWeights};
use crate::trainer::{train, Priors, TrainConfig};

pub const REPORT_HEADER: &str =
    "label-ranking AP over candidate pairs (no box matching); rare = fewer than threshold training positives";

/// All-point AP. Scores are ranked in descending order with ties broken by
/// original index; AP is the mean, over positives, of the precision at each
/// positive's rank. `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(AcpError::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(AcpError::contract(format!("score {s} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// HOI scores of one candidate pair, optionally after projecting Â.
pub fn score_pair(
    params: &ModelParams,
    pair: &CandidatePair,
    groups: Option<&ActionGroups>,
    bank: &CoocBank,
    post: Option<ProjectionWeights>,
    space: &LabelSpace,
) -> Result<HoiProbs> {
    let mut probs = forward(params, &pair.feature, groups)?.probs;
    if let Some(w) = post {
        probs = postprocess(&probs, pair.object, bank, w)?;
    }
    Ok(joint_hoi(pair.human_conf, pair.object_conf, &probs.actions, pair.object, space))
}

/// Positive labels per class (outer) and pair (inner).
pub fn class_labels(corpus: &AnnotationCorpus) -> Vec<Vec<bool>> {
    let space = corpus.label_space();
    space
        .hoi_classes()
        .iter()
        .map(|c| {
            corpus
                .pairs()
                .map(|p| p.object == c.object && p.gt_actions.contains(&c.action))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for classes without test positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
    /// Classes with a defined AP in each split.
    pub n_full: usize,
    pub n_rare: usize,
    pub n_nonrare: usize,
    pub excluded: Vec<usize>,
    pub rare_threshold: usize,
    pub config: serde_json::Value,
}

fn mean_of(ap: &[Option<f64>], members: impl Iterator<Item = usize>) -> (Option<f64>, usize) {
    let vals: Vec<f64> = members.filter_map(|m| ap[m]).collect();
    if vals.is_empty() {
        (None, 0)
    } else {
        (Some(vals.iter().sum::<f64>() / vals.len() as f64), vals.len())
    }
}

/// Report from a score matrix `scores[pair][class]`.
pub fn report_from_scores(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    train_freq: &ClassFrequencies,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let n_classes = labels.len();
    if train_freq.counts.len() != n_classes {
        return Err(AcpError::contract(format!(
            "training frequencies cover {} classes, test labels {}",
            train_freq.counts.len(),
            n_classes
        )));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != n_classes) {
        return Err(AcpError::contract(format!("score row of length {} for {n_classes} classes", row.len())));
    }
    let per_class_ap = (0..n_classes)
        .into_par_iter()
        .map(|m| {
            let col: Vec<f64> = scores.iter().map(|r| r[m]).collect();
            average_precision(&col, &labels[m])
        })
        .collect::<Result<Vec<_>>>()?;
    let (map_full, n_full) = mean_of(&per_class_ap, 0..n_classes);
    let (map_rare, n_rare) = mean_of(&per_class_ap, train_freq.rare.iter().copied());
    let (map_nonrare, n_nonrare) = mean_of(&per_class_ap, train_freq.non_rare.iter().copied());
    let excluded = (0..n_classes).filter(|&m| per_class_ap[m].is_none()).collect();
    Ok(EvalReport {
        per_class_ap,
        map_full,
        map_rare,
        map_nonrare,
        n_full,
        n_rare,
        n_nonrare,
        excluded,
        rare_threshold: train_freq.threshold,
        config,
    })
}

/// Scores every test pair for every class and reports per-class AP and
/// the three split means. `train_freq` must come from the training corpus.
pub fn evaluate(
    params: &ModelParams,
    test: &AnnotationCorpus,
    groups: Option<&ActionGroups>,
    bank: &CoocBank,
    train_freq: &ClassFrequencies,
    post: Option<ProjectionWeights>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let space = test.label_space();
    let pairs: Vec<&CandidatePair> = test.pairs().collect();
    let scores = pairs
        .par_iter()
        .map(|p| score_pair(params, p, groups, bank, post, space).map(|h| h.0))
        .collect::<Result<Vec<_>>>()?;
    report_from_scores(&scores, &class_labels(test), train_freq, config)
}

fn fmt_map(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl EvalReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {REPORT_HEADER} ({})\n", self.rare_threshold);
        let _ = writeln!(out, "{:<10} {:>8} {:>8}", "split", "mAP", "classes");
        for (name, v, n) in [
            ("full", self.map_full, self.n_full),
            ("rare", self.map_rare, self.n_rare),
            ("non-rare", self.map_nonrare, self.n_nonrare),
        ] {
            let _ = writeln!(out, "{:<10} {:>8} {:>8}", name, fmt_map(v), n);
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "{} classes without test positives excluded", self.excluded.len());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn push(&mut self, name: impl Into<String>, report: &EvalReport) {
        self.rows.push(AblationRow {
            name: name.into(),
            map_full: report.map_full,
            map_rare: report.map_rare,
            map_nonrare: report.map_nonrare,
        });
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut out = format!("# {REPORT_HEADER}\n");
        let _ = writeln!(out, "{:<width$} {:>8} {:>8} {:>8}", "method", "full", "rare", "non-rare");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$} {:>8} {:>8} {:>8}",
                r.name,
                fmt_map(r.map_full),
                fmt_map(r.map_rare),
                fmt_map(r.map_nonrare)
            );
        }
        out
    }
}

/// Trains and evaluates one model per named config on shared data. Priors
/// and the rare split come from `train_corpus`; `use_postprocess_in_eval`
/// selects projection at test time.
pub fn ablation(
    train_corpus: &AnnotationCorpus,
    test_corpus: &AnnotationCorpus,
    configs: &[(String, TrainConfig)],
    rare_threshold: usize,
) -> Result<AblationTable> {
    let priors = Priors::from_corpus(train_corpus)?;
    let freq = train_corpus.class_frequencies(rare_threshold);
    let mut table = AblationTable::default();
    for (name, cfg) in configs {
        let groups = cfg.arch.uses_groups().then_some(&priors.groups);
        let out = train(train_corpus, groups, &priors.bank, cfg)?;
        let post = cfg.use_postprocess_in_eval.then_some(cfg.projection_weights);
        let config = serde_json::to_value(cfg).expect("config serializes");
        let report = evaluate(&out.params, test_corpus, groups, &priors.bank, &freq, post, config)?;
        table.push(name.clone(), &report);
    }
    Ok(table)
}

/// Component rows: plain baseline, modified baseline, then hierarchy,
/// distillation and post-processing added one at a time.
pub fn component_rows(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let plain = TrainConfig {
        loss_weights: LossWeights::GT_ONLY,
        use_postprocess_in_eval: false,
        ..base.clone()
    };
    vec![
        ("Baseline".into(), TrainConfig { arch: ArchKind::Baseline, ..plain.clone() }),
        ("Modified".into(), TrainConfig { arch: ArchKind::Modified, ..plain.clone() }),
        ("+Hierarchical".into(), TrainConfig { arch: ArchKind::Hierarchical, ..plain.clone() }),
        (
            "+Hierarchical+Distillation".into(),
            TrainConfig {
                arch: ArchKind::Hierarchical,
                use_postprocess_in_eval: false,
                ..base.clone()
            },
        ),
        (
            "+Hierarchical+Distillation+Post".into(),
            TrainConfig {
                arch: ArchKind::Hierarchical,
                use_postprocess_in_eval: true,
                ..base.clone()
            },
        ),
    ]
}

/// Architecture rows, all trained with ground truth only.
pub fn architecture_rows(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    [ArchKind::Modified, ArchKind::MultiTask, ArchKind::TwoStream, ArchKind::Hierarchical]
        .into_iter()
        .map(|arch| {
            let name = match arch {
                ArchKind::Modified => "(A) Modified Baseline",
                ArchKind::MultiTask => "(B) MultiTask",
                ArchKind::TwoStream => "(C) TwoStream",
                _ => "(D) Hierarchical",
            };
            (
                name.to_string(),
                TrainConfig {
                    arch,
                    loss_weights: LossWeights::GT_ONLY,
                    use_postprocess_in_eval: false,
                    ..base.clone()
                },
            )
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod oracle {
    /// AP by enumerating every prefix of the ranked list: precision of the
    /// prefix ending at each positive, averaged over positives.
    pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let n = scores.len();
        // Rank of i = number of items ahead of it under the tie rule.
        let ahead = |i: usize| {
            (0..n)
                .filter(|&k| scores[k] > scores[i] || (scores[k] == scores[i] && k < i))
                .count()
        };
        let ranked: Vec<usize> = {
            let mut r = vec![0; n];
            for i in 0..n {
                r[ahead(i)] = i;
            }
            r
        };
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 {
            return None;
        }
        let mut total = 0.0;
        for end in 1..=n {
            let prefix = &ranked[..end];
            if labels[prefix[end - 1]] {
                let tp = prefix.iter().filter(|&&i| labels[i]).count();
                total += tp as f64 / end as f64;
            }
        }
        Some(total / positives as f64)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::oracle::brute_force_ap;
    use super::*;

    fn ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let labels: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        average_precision(scores, &labels).unwrap()
    }

    #[test]
    fn worked_example() {
        let v = ap(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((v - 0.833333).abs() < 1e-6);
    }

    #[test]
    fn extremes() {
        assert_eq!(ap(&[0.9, 0.8, 0.1, 0.0], &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(ap(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1]), Some(0.25));
        assert_eq!(ap(&[0.5, 0.5], &[0, 0]), None);
    }

    #[test]
    fn ties_follow_original_index() {
        // Constant scores rank by index: positives at 1 and 3.
        assert_eq!(ap(&[0.3; 4], &[0, 1, 0, 1]), Some((0.5 + 0.5) / 2.0));
        assert_eq!(ap(&[0.3; 4], &[1, 1, 0, 0]), Some(1.0));
        for labels in [[1u8, 0, 0, 1, 0, 1, 0, 0], [0, 0, 0, 0, 0, 0, 0, 1], [1, 1, 1, 1, 1, 1, 1, 1]] {
            let b: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            assert_eq!(ap(&[0.1; 8], &labels), brute_force_ap(&[0.1; 8], &b));
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(average_precision(&[0.1], &[true, false]).is_err());
    }

    fn freq(counts: Vec<usize>, threshold: usize) -> ClassFrequencies {
        let (rare, non_rare) = (0..counts.len()).partition(|&m| counts[m] < threshold);
        ClassFrequencies { counts, rare, non_rare, threshold }
    }

    #[test]
    fn oracle_scores_give_perfect_map() {
        let labels = vec![vec![true, false, true], vec![false, true, false], vec![false; 3]];
        let scores: Vec<Vec<f64>> = (0..3)
            .map(|p| labels.iter().map(|col| if col[p] { 1.0 } else { 0.0 }).collect())
            .collect();
        let r = report_from_scores(&scores, &labels, &freq(vec![20, 3, 0], 10), serde_json::Value::Null).unwrap();
        assert_eq!(r.map_full, Some(1.0));
        assert_eq!(r.map_rare, Some(1.0));
        assert_eq!(r.map_nonrare, Some(1.0));
        assert_eq!(r.excluded, vec![2]);
        assert_eq!((r.n_full, r.n_rare, r.n_nonrare), (2, 1, 1));
    }

    #[test]
    fn empty_split_is_undefined() {
        let labels = vec![vec![true, false]];
        let r = report_from_scores(&[vec![0.3], vec![0.2]], &labels, &freq(vec![50], 10), serde_json::Value::Null)
            .unwrap();
        assert_eq!(r.map_rare, None);
        assert!(r.to_text().contains("n/a"));
    }

    #[test]
    fn ablation_table_renders_rows() {
        let mut t = AblationTable::default();
        let labels = vec![vec![true, false]];
        let r = report_from_scores(&[vec![0.3], vec![0.2]], &labels, &freq(vec![1], 10), serde_json::Value::Null)
            .unwrap();
        t.push("Modified", &r);
        let text = t.to_text();
        assert!(text.lines().nth(2).unwrap().starts_with("Modified"));
        assert!(text.contains("100.00"));
    }

    fn tiny_split() -> (AnnotationCorpus, AnnotationCorpus) {
        let b = crate::synth::generate(&crate::synth::SynthConfig {
            images: 80,
            test_images: 40,
            feature_dim: 6,
            ..Default::default()
        })
        .unwrap();
        (b.train, b.test)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            fused: 6,
            hidden: 6,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn architecture_table_shape_and_determinism() {
        let (train, test) = tiny_split();
        let rows = architecture_rows(&tiny_cfg());
        let a = ablation(&train, &test, &rows, 10).unwrap();
        let names: Vec<&str> = a.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["(A) Modified Baseline", "(B) MultiTask", "(C) TwoStream", "(D) Hierarchical"]);
        assert_eq!(a, ablation(&train, &test, &rows, 10).unwrap());
        let one = ablation(&train, &test, &rows[..1], 10).unwrap();
        assert_eq!(one.rows, a.rows[..1]);
    }

    #[test]
    fn component_rows_differ_only_where_intended() {
        let rows = component_rows(&tiny_cfg());
        assert_eq!(rows.len(), 5);
        assert!(rows[..3].iter().all(|(_, c)| c.loss_weights == LossWeights::GT_ONLY && !c.use_postprocess_in_eval));
        assert_eq!(rows[3].1.loss_weights, tiny_cfg().loss_weights);
        assert!(rows[4].1.use_postprocess_in_eval);
    }

    proptest! {
        #[test]
        fn matches_brute_force(items in proptest::collection::vec((0..5u8, any::<bool>()), 1..=12)) {
            let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = items.iter().map(|(_, l)| *l).collect();
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), brute_force_ap(&scores, &labels));
        }

        #[test]
        fn permuting_distinct_scores_keeps_ap(
            labels in proptest::collection::vec(any::<bool>(), 1..=12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = labels.len();
            let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s2: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let l2: Vec<bool> = perm.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&s2, &l2).unwrap());
        }
    }
}
