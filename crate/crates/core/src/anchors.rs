//! Anchor-action selection and action groups.
//!
//! Anchors are a set of actions that never co-occur with each other. They are
//! picked greedily by non-exclusive suppression: take the remaining action
//! that excludes the most others, then drop every remaining action that can
//! co-occur with it. A synthetic `other` anchor covers images where no anchor
//! occurs. Every non-anchor ("regular") action is then attached to the group
//! of each anchor it can co-occur with.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cooc::CoocPair;
use crate::corpus::{ActionSet, AnnotationCorpus};
use crate::error::{AcpError, Result};
use crate::io::{from_json, read_to_string, write_atomic};

/// Per-action count of actions that never co-occur with it. Invalid rows
/// (actions never observed) hold `-1`.
pub fn exclusiveness(pair: &CoocPair) -> Vec<i64> {
    exclusiveness_with_tolerance(pair, 0.0)
}

/// As [`exclusiveness`], treating entries `<= tau` as zero.
pub fn exclusiveness_with_tolerance(pair: &CoocPair, tau: f64) -> Vec<i64> {
    let n = pair.n();
    (0..n)
        .map(|i| {
            if pair.row_valid()[i] {
                pair.cooc_row(i).iter().filter(|&&c| c <= tau).count() as i64
            } else {
                -1
            }
        })
        .collect()
}

/// Non-exclusive suppression. Returns anchors in selection order; ties in
/// exclusiveness go to the lowest action index.
pub fn nes_select(pair: &CoocPair) -> Vec<usize> {
    nes_select_with_tolerance(pair, 0.0)
}

pub fn nes_select_with_tolerance(pair: &CoocPair, tau: f64) -> Vec<usize> {
    let e = exclusiveness_with_tolerance(pair, tau);
    let mut remaining: Vec<bool> = e.iter().map(|&v| v >= 0).collect();
    let mut anchors = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for k in (0..e.len()).filter(|&k| remaining[k]) {
            if best.is_none_or(|b| e[k] > e[b]) {
                best = Some(k);
            }
        }
        let Some(m) = best else { break };
        anchors.push(m);
        remaining[m] = false;
        for (k, alive) in remaining.iter_mut().enumerate() {
            if *alive && pair.c(m, k) > tau {
                *alive = false;
            }
        }
    }
    anchors
}

/// Anchor set, regular set and group membership.
///
/// Slots `0..anchors.len()` are the selected anchors in selection order;
/// slot `anchors.len()` is the `other` anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionGroups {
    anchors: Vec<usize>,
    regular: Vec<usize>,
    membership: Vec<Vec<usize>>,
    other_cond_row: Vec<f64>,
    // derived lookups
    anchor_slot: Vec<Option<usize>>,
    regular_pos: Vec<Option<usize>>,
    member_mask: Vec<Vec<bool>>,
}

impl ActionGroups {
    /// Builds groups from explicit parts, checking the partition invariants.
    pub fn from_parts(
        n_actions: usize,
        anchors: Vec<usize>,
        membership: Vec<Vec<usize>>,
        other_cond_row: Vec<f64>,
    ) -> Result<Self> {
        let fail = |m: String| Err(AcpError::validation("action groups", m));
        if other_cond_row.len() != n_actions {
            return fail(format!(
                "other_cond_row has length {}, expected {n_actions}",
                other_cond_row.len()
            ));
        }
        if membership.len() != anchors.len() + 1 {
            return fail(format!(
                "{} membership lists for {} anchors plus other",
                membership.len(),
                anchors.len()
            ));
        }
        let mut anchor_slot = vec![None; n_actions];
        for (s, &a) in anchors.iter().enumerate() {
            if a >= n_actions {
                return fail(format!("anchor {a} out of range"));
            }
            if anchor_slot[a].replace(s).is_some() {
                return fail(format!("anchor {a} listed twice"));
            }
        }
        let regular: Vec<usize> = (0..n_actions).filter(|&a| anchor_slot[a].is_none()).collect();
        let mut regular_pos = vec![None; n_actions];
        for (p, &j) in regular.iter().enumerate() {
            regular_pos[j] = Some(p);
        }
        let mut member_mask = vec![vec![false; regular.len()]; membership.len()];
        let mut covered = vec![false; regular.len()];
        for (s, members) in membership.iter().enumerate() {
            for &j in members {
                let Some(p) = regular_pos.get(j).copied().flatten() else {
                    return fail(format!("group {s} contains non-regular action {j}"));
                };
                member_mask[s][p] = true;
                covered[p] = true;
            }
        }
        if let Some(p) = covered.iter().position(|&c| !c) {
            return fail(format!("regular action {} belongs to no group", regular[p]));
        }
        let membership = member_mask
            .iter()
            .map(|mask| (0..regular.len()).filter(|&p| mask[p]).map(|p| regular[p]).collect())
            .collect();
        Ok(ActionGroups {
            anchors,
            regular,
            membership,
            other_cond_row,
            anchor_slot,
            regular_pos,
            member_mask,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.anchor_slot.len()
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn regular(&self) -> &[usize] {
        &self.regular
    }

    /// |D| + 1.
    pub fn n_slots(&self) -> usize {
        self.anchors.len() + 1
    }

    pub fn other_slot(&self) -> usize {
        self.anchors.len()
    }

    /// Regular actions in the group of `slot`, ascending.
    pub fn members(&self, slot: usize) -> &[usize] {
        &self.membership[slot]
    }

    /// Membership of `slot` over positions of [`Self::regular`].
    pub fn member_mask(&self, slot: usize) -> &[bool] {
        &self.member_mask[slot]
    }

    pub fn other_cond_row(&self) -> &[f64] {
        &self.other_cond_row
    }

    pub fn anchor_slot(&self, action: usize) -> Option<usize> {
        self.anchor_slot[action]
    }

    pub fn regular_position(&self, action: usize) -> Option<usize> {
        self.regular_pos[action]
    }

    /// One-hot (or uniform, if several anchors are labeled) target over the
    /// anchor slots for a ground-truth action set.
    pub fn anchor_target(&self, gt: &ActionSet) -> Vec<f64> {
        let slots: Vec<usize> = gt.iter().filter_map(|&a| self.anchor_slot[a]).collect();
        let mut t = vec![0.0; self.n_slots()];
        if slots.is_empty() {
            t[self.other_slot()] = 1.0;
        } else {
            let w = 1.0 / slots.len() as f64;
            for s in slots {
                t[s] += w;
            }
        }
        t
    }
}

fn check_exclusive(pair: &CoocPair, anchors: &[usize], tau: f64) -> Result<()> {
    for (x, &i) in anchors.iter().enumerate() {
        if i >= pair.n() {
            return Err(AcpError::contract(format!("anchor {i} out of range")));
        }
        for &j in &anchors[x + 1..] {
            if i == j {
                return Err(AcpError::contract(format!("anchor {i} repeated")));
            }
            if pair.c(i, j) > tau || pair.c(j, i) > tau {
                return Err(AcpError::contract(format!(
                    "anchors {i} and {j} co-occur (c = {}, {})",
                    pair.c(i, j),
                    pair.c(j, i)
                )));
            }
        }
    }
    Ok(())
}

/// Assigns regular actions to anchor groups. `sets` are the image-level
/// occurrence sets `pair` was built from; they define the empirical
/// conditional row of the `other` anchor.
pub fn build_groups_from_sets(
    pair: &CoocPair,
    anchors: &[usize],
    sets: &[ActionSet],
    tau: f64,
) -> Result<ActionGroups> {
    check_exclusive(pair, anchors, tau)?;
    let n = pair.n();
    let is_anchor = {
        let mut v = vec![false; n];
        anchors.iter().for_each(|&a| v[a] = true);
        v
    };
    let regular: Vec<usize> = (0..n).filter(|&a| !is_anchor[a]).collect();

    let mut other_count = vec![0usize; n];
    let mut anchor_free = 0usize;
    for set in sets.iter().filter(|s| s.iter().all(|&a| !is_anchor[a])) {
        anchor_free += 1;
        for &a in set {
            other_count[a] += 1;
        }
    }
    let other_cond_row: Vec<f64> = if anchor_free == 0 {
        vec![0.0; n]
    } else {
        other_count.iter().map(|&c| c as f64 / anchor_free as f64).collect()
    };

    let mut membership: Vec<Vec<usize>> = anchors
        .iter()
        .map(|&i| regular.iter().copied().filter(|&j| pair.c(i, j) > tau).collect())
        .collect();
    let mut other: Vec<usize> = regular
        .iter()
        .copied()
        .filter(|&j| other_cond_row[j] > tau)
        .collect();
    let covered = |j: usize, m: &[Vec<usize>]| m.iter().any(|g| g.contains(&j));
    let orphans: Vec<usize> = regular
        .iter()
        .copied()
        .filter(|&j| !covered(j, &membership) && !other.contains(&j))
        .collect();
    other.extend(orphans);
    other.sort_unstable();
    membership.push(other);

    ActionGroups::from_parts(n, anchors.to_vec(), membership, other_cond_row)
}

pub fn build_groups(pair: &CoocPair, anchors: &[usize], corpus: &AnnotationCorpus) -> Result<ActionGroups> {
    build_groups_from_sets(pair, anchors, &corpus.action_occurrence_sets(None), 0.0)
}

#[derive(Serialize, Deserialize)]
struct GroupsFile {
    anchors: Vec<usize>,
    other: Vec<usize>,
    groups: BTreeMap<usize, Vec<usize>>,
    other_cond_row: Vec<f64>,
}

impl ActionGroups {
    pub fn to_json_string(&self) -> String {
        let file = GroupsFile {
            anchors: self.anchors.clone(),
            other: self.membership[self.other_slot()].clone(),
            groups: self
                .anchors
                .iter()
                .zip(&self.membership)
                .map(|(&a, m)| (a, m.clone()))
                .collect(),
            other_cond_row: self.other_cond_row.clone(),
        };
        serde_json::to_string_pretty(&file).expect("groups serialize")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut file: GroupsFile = from_json(text)?;
        let mut membership = Vec::with_capacity(file.anchors.len() + 1);
        for a in &file.anchors {
            let members = file
                .groups
                .remove(a)
                .ok_or_else(|| AcpError::parse(format!("groups.{a}"), "missing group for anchor"))?;
            membership.push(members);
        }
        if let Some(extra) = file.groups.keys().next() {
            return Err(AcpError::parse(format!("groups.{extra}"), "group for a non-anchor action"));
        }
        membership.push(file.other);
        ActionGroups::from_parts(file.other_cond_row.len(), file.anchors, membership, file.other_cond_row)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json_string().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooc::{build_cooc, fixtures};
    use crate::corpus::fixtures::{corpus, pair, toy};

    fn toy_pair() -> CoocPair {
        build_cooc(&toy().action_occurrence_sets(None), 3).unwrap()
    }

    #[test]
    fn toy_exclusiveness() {
        assert_eq!(exclusiveness(&toy_pair()), vec![0, 1, 1]);
    }

    #[test]
    fn exclusiveness_extremes() {
        assert_eq!(exclusiveness(&fixtures::exclusive(3)), vec![2, 2, 2]);
        assert_eq!(exclusiveness(&fixtures::dense(4)), vec![0; 4]);
    }

    #[test]
    fn invalid_rows_are_marked_and_never_anchors() {
        let p = build_cooc(&[[0].into(), [1].into()], 3).unwrap();
        assert_eq!(exclusiveness(&p), vec![2, 2, -1]);
        assert_eq!(nes_select(&p), vec![0, 1]);
    }

    #[test]
    fn toy_nes() {
        assert_eq!(nes_select(&toy_pair()), vec![1, 2]);
    }

    #[test]
    fn nes_extremes() {
        assert_eq!(nes_select(&fixtures::exclusive(3)), vec![0, 1, 2]);
        assert_eq!(nes_select(&fixtures::dense(5)), vec![0]);
    }

    #[test]
    fn tolerance_reclassifies_small_entries() {
        let cooc = vec![1.0, 0.01, 0.01, 1.0];
        let p = CoocPair::from_parts(2, cooc, vec![0.0; 4], vec![true; 2], vec![true; 2]).unwrap();
        assert_eq!(nes_select(&p), vec![0]);
        assert_eq!(nes_select_with_tolerance(&p, 0.05), vec![0, 1]);
    }

    #[test]
    fn toy_groups() {
        let g = build_groups(&toy_pair(), &[1, 2], &toy()).unwrap();
        assert_eq!(g.regular(), &[0]);
        assert_eq!(g.members(0), &[0]);
        assert_eq!(g.members(1), &[0]);
        assert!(g.members(g.other_slot()).is_empty());
        assert_eq!(g.other_cond_row(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_anchors_leave_no_regulars() {
        let p = fixtures::exclusive(3);
        let sets: Vec<ActionSet> = vec![[0].into(), [1].into(), [2].into()];
        let g = build_groups_from_sets(&p, &[0, 1, 2], &sets, 0.0).unwrap();
        assert!(g.regular().is_empty());
        assert!((0..g.n_slots()).all(|s| g.members(s).is_empty()));
    }

    #[test]
    fn anchor_free_only_action_goes_to_other() {
        // a0 and a1 are exclusive anchors; a2 rides along with a0; a3 only
        // appears in the anchor-free image.
        let c = corpus(
            4,
            1,
            vec![
                vec![pair(0, &[0, 2])],
                vec![pair(0, &[0])],
                vec![pair(0, &[1])],
                vec![pair(0, &[1])],
                vec![pair(0, &[3])],
            ],
        );
        let p = build_cooc(&c.action_occurrence_sets(None), 4).unwrap();
        let g = build_groups(&p, &[0, 1], &c).unwrap();
        assert_eq!(g.members(0), &[2]);
        assert!(g.members(1).is_empty());
        assert_eq!(g.members(g.other_slot()), &[3]);
        assert_eq!(g.other_cond_row(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn orphan_falls_back_to_other() {
        // action 2 is never observed: no anchor group and zero other row
        let sets: Vec<ActionSet> = vec![[0].into(), [1].into()];
        let p = build_cooc(&sets, 3).unwrap();
        let g = build_groups_from_sets(&p, &[0, 1], &sets, 0.0).unwrap();
        assert_eq!(g.members(g.other_slot()), &[2]);
    }

    #[test]
    fn non_exclusive_anchors_are_a_contract_error() {
        assert!(matches!(
            build_groups(&toy_pair(), &[0, 1], &toy()),
            Err(AcpError::Contract(_))
        ));
    }

    #[test]
    fn anchor_targets() {
        let g = build_groups(&toy_pair(), &[1, 2], &toy()).unwrap();
        assert_eq!(g.anchor_target(&[0, 1].into()), vec![1.0, 0.0, 0.0]);
        assert_eq!(g.anchor_target(&[0].into()), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn json_round_trip_and_shape() {
        let g = build_groups(&toy_pair(), &[1, 2], &toy()).unwrap();
        let text = g.to_json_string();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["anchors"], serde_json::json!([1, 2]));
        assert_eq!(v["groups"]["1"], serde_json::json!([0]));
        assert_eq!(v["other"], serde_json::json!([]));
        assert_eq!(ActionGroups::from_json_str(&text).unwrap(), g);
    }
}
