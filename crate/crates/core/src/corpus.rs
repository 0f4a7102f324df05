//! Label space and annotation corpus.
//!
//! A corpus is a list of images, each holding candidate human-object pairs
//! with detector confidences, an object class, the ground-truth action set
//! of the pair and a pre-fused feature vector. All downstream statistics are
//! derived from a validated, immutable [`AnnotationCorpus`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AcpError, Result};
use crate::io::{from_json, read_to_string, write_atomic};

/// Sorted set of action indices.
pub type ActionSet = BTreeSet<usize>;

/// Classes with fewer training positives than this are "rare".
pub const DEFAULT_RARE_THRESHOLD: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HoiClass {
    pub action: usize,
    pub object: usize,
}

/// Action vocabulary, object vocabulary and the HOI class table.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSpace {
    actions: Vec<String>,
    objects: Vec<String>,
    hoi_classes: Vec<HoiClass>,
    class_index: HashMap<HoiClass, usize>,
    by_object: Vec<Vec<usize>>,
}

impl LabelSpace {
    pub fn new(
        actions: Vec<String>,
        objects: Vec<String>,
        hoi_classes: Vec<HoiClass>,
    ) -> Result<Self> {
        let mut class_index = HashMap::with_capacity(hoi_classes.len());
        let mut by_object = vec![Vec::new(); objects.len()];
        for (m, class) in hoi_classes.iter().enumerate() {
            if class.action >= actions.len() {
                return Err(AcpError::validation(
                    format!("hoi_classes[{m}]"),
                    format!("action {} out of range (N = {})", class.action, actions.len()),
                ));
            }
            if class.object >= objects.len() {
                return Err(AcpError::validation(
                    format!("hoi_classes[{m}]"),
                    format!(
                        "object {} out of range ({} objects)",
                        class.object,
                        objects.len()
                    ),
                ));
            }
            if class_index.insert(*class, m).is_some() {
                return Err(AcpError::validation(
                    format!("hoi_classes[{m}]"),
                    format!(
                        "duplicate (action {}, object {}) pair",
                        class.action, class.object
                    ),
                ));
            }
            by_object[class.object].push(m);
        }
        Ok(LabelSpace {
            actions,
            objects,
            hoi_classes,
            class_index,
            by_object,
        })
    }

    /// N, the number of action classes.
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    /// M, the number of HOI classes.
    pub fn n_classes(&self) -> usize {
        self.hoi_classes.len()
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn hoi_classes(&self) -> &[HoiClass] {
        &self.hoi_classes
    }

    pub fn class_of(&self, action: usize, object: usize) -> Option<usize> {
        self.class_index.get(&HoiClass { action, object }).copied()
    }

    /// HOI class indices whose object is `object`, in table order.
    pub fn classes_for_object(&self, object: usize) -> &[usize] {
        self.by_object.get(object).map_or(&[], Vec::as_slice)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }
}

/// One detected human-object candidate with its labels and fused feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub human_conf: f64,
    pub object_conf: f64,
    pub object: usize,
    #[serde(rename = "actions")]
    pub gt_actions: ActionSet,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub pairs: Vec<CandidatePair>,
}

/// Per-HOI-class positive counts with the rare / non-rare split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassFrequencies {
    pub counts: Vec<usize>,
    pub rare: Vec<usize>,
    pub non_rare: Vec<usize>,
    pub threshold: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationCorpus {
    label_space: LabelSpace,
    images: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    actions: Vec<String>,
    objects: Vec<String>,
    hoi_classes: Vec<HoiClass>,
    images: Vec<ImageRecord>,
}

impl AnnotationCorpus {
    pub fn new(label_space: LabelSpace, images: Vec<ImageRecord>) -> Result<Self> {
        let n = label_space.n_actions();
        let mut ids = HashSet::with_capacity(images.len());
        let mut feature_dim = None;
        for image in &images {
            let context = || format!("image `{}`", image.id);
            if !ids.insert(image.id.as_str()) {
                return Err(AcpError::validation(context(), "duplicate image id"));
            }
            for (p, pair) in image.pairs.iter().enumerate() {
                let fail = |message: String| {
                    Err(AcpError::validation(context(), format!("pair {p}: {message}")))
                };
                for (name, value) in [("human_conf", pair.human_conf), ("object_conf", pair.object_conf)] {
                    if !(0.0..=1.0).contains(&value) {
                        return fail(format!("{name} {value} outside [0, 1]"));
                    }
                }
                if pair.object >= label_space.n_objects() {
                    return fail(format!("object {} out of range", pair.object));
                }
                if let Some(&a) = pair.gt_actions.iter().find(|&&a| a >= n) {
                    return fail(format!("action {a} out of range (N = {n})"));
                }
                if pair.feature.iter().any(|v| !v.is_finite()) {
                    return fail("non-finite feature value".to_string());
                }
                match feature_dim {
                    None => feature_dim = Some(pair.feature.len()),
                    Some(d) if d != pair.feature.len() => {
                        return fail(format!(
                            "feature dimension {} differs from {d}",
                            pair.feature.len()
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(AnnotationCorpus {
            label_space,
            images,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CorpusFile = from_json(text)?;
        let space = LabelSpace::new(file.actions, file.objects, file.hoi_classes)?;
        AnnotationCorpus::new(space, file.images)
    }

    pub fn to_json_string(&self) -> String {
        let file = CorpusFile {
            actions: self.label_space.actions.clone(),
            objects: self.label_space.objects.clone(),
            hoi_classes: self.label_space.hoi_classes.clone(),
            images: self.images.clone(),
        };
        serde_json::to_string_pretty(&file).expect("corpus serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json_string().as_bytes())
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn n_pairs(&self) -> usize {
        self.images.iter().map(|i| i.pairs.len()).sum()
    }

    /// All candidate pairs in image order.
    pub fn pairs(&self) -> impl Iterator<Item = &CandidatePair> {
        self.images.iter().flat_map(|i| i.pairs.iter())
    }

    /// Feature dimension, or `None` for a corpus without pairs.
    pub fn feature_dim(&self) -> Option<usize> {
        self.pairs().next().map(|p| p.feature.len())
    }

    /// Image-level action sets: the union of `gt_actions` over each image's
    /// pairs. With an object filter only pairs on that object contribute and
    /// images without such a pair are skipped.
    pub fn action_occurrence_sets(&self, object_filter: Option<usize>) -> Vec<ActionSet> {
        self.images
            .iter()
            .filter_map(|image| {
                let mut matched = object_filter.is_none();
                let mut set = ActionSet::new();
                for pair in &image.pairs {
                    if object_filter.is_some_and(|o| o != pair.object) {
                        continue;
                    }
                    matched = true;
                    set.extend(pair.gt_actions.iter().copied());
                }
                matched.then_some(set)
            })
            .collect()
    }

    /// Positive pair counts per HOI class. Labels that have no HOI class in
    /// the table are not counted.
    pub fn class_frequencies(&self, threshold: usize) -> ClassFrequencies {
        let space = &self.label_space;
        let mut counts = vec![0usize; space.n_classes()];
        for pair in self.pairs() {
            for &a in &pair.gt_actions {
                if let Some(m) = space.class_of(a, pair.object) {
                    counts[m] += 1;
                }
            }
        }
        let (rare, non_rare) = (0..counts.len()).partition(|&m| counts[m] < threshold);
        ClassFrequencies {
            counts,
            rare,
            non_rare,
            threshold,
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn set(xs: &[usize]) -> ActionSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn toy_corpus_loads() {
        let c = toy();
        assert_eq!(c.label_space().n_actions(), 3);
        assert_eq!(c.images().len(), 4);
        assert_eq!(c.label_space().n_classes(), 3);
    }

    #[test]
    fn empty_images_is_valid() {
        let c = AnnotationCorpus::from_json_str(
            r#"{"actions":["a"],"objects":["o"],"hoi_classes":[],"images":[]}"#,
        )
        .unwrap();
        assert!(c.images().is_empty());
        assert_eq!(c.feature_dim(), None);
    }

    #[test]
    fn out_of_range_action_is_rejected_with_image_id() {
        let mut value: serde_json::Value = serde_json::from_str(TOY_JSON).unwrap();
        value["images"][1]["pairs"][0]["actions"] = serde_json::json!([3]);
        let text = value.to_string();
        match AnnotationCorpus::from_json_str(&text) {
            Err(AcpError::Validation { context, message }) => {
                assert_eq!(context, "image `img1`");
                assert!(message.contains("action 3"), "{message}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_field_is_named() {
        let text = r#"{"actions":["a"],"objects":["o"],"hoi_classes":[],
            "images":[{"id":"x","pairs":[{"human_conf":"high","object_conf":1,"object":0,"actions":[],"feature":[]}]}]}"#;
        match AnnotationCorpus::from_json_str(text) {
            Err(AcpError::Parse { field, .. }) => assert_eq!(field, "images[0].pairs[0].human_conf"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_classes_are_rejected() {
        let dup = corpus(2, 1, vec![vec![pair(0, &[0])]]);
        let mut images = dup.images().to_vec();
        images.push(images[0].clone());
        assert!(AnnotationCorpus::new(dup.label_space().clone(), images).is_err());

        let classes = vec![HoiClass { action: 0, object: 0 }; 2];
        assert!(LabelSpace::new(vec!["a".into()], vec!["o".into()], classes).is_err());
    }

    #[test]
    fn confidence_out_of_range_is_rejected() {
        let c = corpus(2, 1, vec![]);
        let mut p = pair(0, &[0]);
        p.human_conf = 1.5;
        let images = vec![ImageRecord { id: "bad".into(), pairs: vec![p] }];
        assert!(AnnotationCorpus::new(c.label_space().clone(), images).is_err());
    }

    #[test]
    fn occurrence_sets_of_toy_corpus() {
        let sets = toy().action_occurrence_sets(None);
        assert_eq!(sets, vec![set(&[0, 1]), set(&[1]), set(&[0, 2]), set(&[2])]);
    }

    #[test]
    fn occurrence_sets_with_absent_object_filter() {
        let c = corpus(3, 2, vec![vec![pair(0, &[0])], vec![pair(0, &[1])]]);
        assert!(c.action_occurrence_sets(Some(1)).is_empty());
    }

    #[test]
    fn occurrence_sets_take_union_over_pairs() {
        let c = corpus(3, 1, vec![vec![pair(0, &[0]), pair(0, &[1])]]);
        assert_eq!(c.action_occurrence_sets(None), vec![set(&[0, 1])]);
    }

    #[test]
    fn occurrence_sets_filter_by_object() {
        let c = corpus(
            3,
            2,
            vec![vec![pair(0, &[0]), pair(1, &[2])], vec![pair(1, &[1])], vec![pair(0, &[])]],
        );
        assert_eq!(c.action_occurrence_sets(Some(1)), vec![set(&[2]), set(&[1])]);
        assert_eq!(c.action_occurrence_sets(Some(0)), vec![set(&[0]), set(&[])]);
    }

    #[test]
    fn toy_class_frequencies() {
        let c = toy();
        let f = c.class_frequencies(DEFAULT_RARE_THRESHOLD);
        assert_eq!(f.counts, vec![2, 2, 2]);
        assert_eq!(f.rare, vec![0, 1, 2]);
        assert!(f.non_rare.is_empty());

        let f0 = c.class_frequencies(0);
        assert!(f0.rare.is_empty());
        assert_eq!(f0.non_rare.len(), 3);
    }

    #[test]
    fn unannotated_class_counts_zero_and_is_rare() {
        let c = corpus(3, 1, vec![vec![pair(0, &[0])]]);
        let f = c.class_frequencies(1);
        assert_eq!(f.counts, vec![1, 0, 0]);
        assert_eq!(f.rare, vec![1, 2]);
        assert_eq!(f.non_rare, vec![0]);
    }

    #[test]
    fn save_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = toy();
        c.save(&path).unwrap();
        let again = AnnotationCorpus::load(&path).unwrap();
        assert_eq!(c, again);
        again.save(&path).unwrap();
        assert_eq!(AnnotationCorpus::load(&path).unwrap(), c);
    }
}
