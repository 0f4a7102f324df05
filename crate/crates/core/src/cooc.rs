//! Action co-occurrence matrices.
//!
//! `C[i][j]` is the empirical probability that action `j` occurs in an
//! occurrence set given that action `i` does; the complementary matrix
//! `C'[i][j]` conditions on `i` being absent. Rows whose conditioning event
//! never happens are stored as zeros and flagged invalid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ActionSet, AnnotationCorpus};
use crate::error::{AcpError, Result};
use crate::io::{from_json, read_to_string, write_atomic};

/// A co-occurrence matrix and its complement, dense row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocPair {
    n: usize,
    cooc: Vec<f64>,
    comp: Vec<f64>,
    row_valid: Vec<bool>,
    comp_row_valid: Vec<bool>,
}

impl CoocPair {
    /// Assembles a pair from raw parts. No invariant checking; see
    /// [`validate_cooc`].
    pub fn from_parts(
        n: usize,
        cooc: Vec<f64>,
        comp: Vec<f64>,
        row_valid: Vec<bool>,
        comp_row_valid: Vec<bool>,
    ) -> Result<Self> {
        if cooc.len() != n * n || comp.len() != n * n {
            return Err(AcpError::contract(format!("matrices must be {n}x{n}")));
        }
        if row_valid.len() != n || comp_row_valid.len() != n {
            return Err(AcpError::contract(format!("row masks must have length {n}")));
        }
        Ok(CoocPair {
            n,
            cooc,
            comp,
            row_valid,
            comp_row_valid,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.cooc[i * self.n + j]
    }

    #[inline]
    pub fn c_comp(&self, i: usize, j: usize) -> f64 {
        self.comp[i * self.n + j]
    }

    pub fn cooc_row(&self, i: usize) -> &[f64] {
        &self.cooc[i * self.n..(i + 1) * self.n]
    }

    pub fn comp_row(&self, i: usize) -> &[f64] {
        &self.comp[i * self.n..(i + 1) * self.n]
    }

    pub fn cooc_matrix(&self) -> &[f64] {
        &self.cooc
    }

    pub fn comp_matrix(&self) -> &[f64] {
        &self.comp
    }

    pub fn row_valid(&self) -> &[bool] {
        &self.row_valid
    }

    pub fn comp_row_valid(&self) -> &[bool] {
        &self.comp_row_valid
    }

    /// Sub-matrix on `keep` (in the given order).
    pub fn restrict(&self, keep: &[usize]) -> CoocPair {
        let k = keep.len();
        let mut cooc = Vec::with_capacity(k * k);
        let mut comp = Vec::with_capacity(k * k);
        for &i in keep {
            for &j in keep {
                cooc.push(self.c(i, j));
                comp.push(self.c_comp(i, j));
            }
        }
        CoocPair {
            n: k,
            cooc,
            comp,
            row_valid: keep.iter().map(|&i| self.row_valid[i]).collect(),
            comp_row_valid: keep.iter().map(|&i| self.comp_row_valid[i]).collect(),
        }
    }
}

/// Counts joint and marginal occurrences and turns them into `C` and `C'`.
pub fn build_cooc(sets: &[ActionSet], n: usize) -> Result<CoocPair> {
    if n == 0 {
        return Err(AcpError::EmptySpace);
    }
    let mut joint = vec![0u64; n * n];
    for (k, set) in sets.iter().enumerate() {
        if let Some(&a) = set.iter().find(|&&a| a >= n) {
            return Err(AcpError::contract(format!(
                "occurrence set {k} holds action {a} outside [0, {n})"
            )));
        }
        let members: Vec<usize> = set.iter().copied().collect();
        for &i in &members {
            for &j in &members {
                joint[i * n + j] += 1;
            }
        }
    }
    let total = sets.len() as u64;
    let marginal: Vec<u64> = (0..n).map(|i| joint[i * n + i]).collect();

    let mut cooc = vec![0.0; n * n];
    let mut comp = vec![0.0; n * n];
    let mut row_valid = vec![false; n];
    let mut comp_row_valid = vec![false; n];
    for i in 0..n {
        let with_i = marginal[i];
        let without_i = total - with_i;
        row_valid[i] = with_i > 0;
        comp_row_valid[i] = without_i > 0;
        for j in 0..n {
            let both = joint[i * n + j];
            if with_i > 0 {
                cooc[i * n + j] = both as f64 / with_i as f64;
            }
            if without_i > 0 {
                comp[i * n + j] = (marginal[j] - both) as f64 / without_i as f64;
            }
        }
    }
    Ok(CoocPair {
        n,
        cooc,
        comp,
        row_valid,
        comp_row_valid,
    })
}

/// The global pair plus one pair per object class seen in the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocBank {
    pub global: CoocPair,
    pub per_object: BTreeMap<usize, CoocPair>,
}

impl CoocBank {
    /// Per-object pair, falling back to the global pair for objects the
    /// bank has never seen. The flag is `true` when the fallback was used.
    pub fn for_object(&self, object: usize) -> (&CoocPair, bool) {
        match self.per_object.get(&object) {
            Some(pair) => (pair, false),
            None => (&self.global, true),
        }
    }

    pub fn n(&self) -> usize {
        self.global.n()
    }
}

pub fn build_bank(corpus: &AnnotationCorpus) -> Result<CoocBank> {
    let space = corpus.label_space();
    let n = space.n_actions();
    let global = build_cooc(&corpus.action_occurrence_sets(None), n)?;
    let per_object = (0..space.n_objects())
        .into_par_iter()
        .filter_map(|o| {
            let sets = corpus.action_occurrence_sets(Some(o));
            (!sets.is_empty()).then(|| build_cooc(&sets, n).map(|pair| (o, pair)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    Ok(CoocBank { global, per_object })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoocRule {
    OutOfRange,
    Diagonal,
    PositivitySymmetry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoocViolation {
    pub i: usize,
    pub j: usize,
    pub rule: CoocRule,
    /// true when the offending entry is in the complementary matrix
    pub complementary: bool,
}

impl fmt::Display for CoocViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = if self.complementary { "C'" } else { "C" };
        match self.rule {
            CoocRule::OutOfRange => write!(f, "{m} entry ({}, {}) outside [0, 1]", self.i, self.j),
            CoocRule::Diagonal => write!(f, "diagonal ≠ 1 at {}", self.i),
            CoocRule::PositivitySymmetry => write!(
                f,
                "positivity-symmetry broken: c({}, {}) > 0 but c({}, {}) = 0",
                self.i, self.j, self.j, self.i
            ),
        }
    }
}

/// Lists every broken invariant; empty iff the pair is well formed.
pub fn validate_cooc(pair: &CoocPair) -> Vec<CoocViolation> {
    let n = pair.n;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for (complementary, v) in [(false, pair.c(i, j)), (true, pair.c_comp(i, j))] {
                if !(0.0..=1.0).contains(&v) {
                    out.push(CoocViolation {
                        i,
                        j,
                        rule: CoocRule::OutOfRange,
                        complementary,
                    });
                }
            }
        }
    }
    for i in (0..n).filter(|&i| pair.row_valid[i]) {
        if pair.c(i, i) != 1.0 {
            out.push(CoocViolation {
                i,
                j: i,
                rule: CoocRule::Diagonal,
                complementary: false,
            });
        }
        for j in (0..n).filter(|&j| j != i && pair.row_valid[j]) {
            if pair.c(i, j) > 0.0 && pair.c(j, i) == 0.0 {
                out.push(CoocViolation {
                    i,
                    j,
                    rule: CoocRule::PositivitySymmetry,
                    complementary: false,
                });
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    object: Option<usize>,
    name: String,
    cooc_file: String,
    comp_file: String,
    row_valid: Vec<bool>,
    comp_row_valid: Vec<bool>,
}

/// On-disk index of a bank directory.
#[derive(Serialize, Deserialize)]
struct BankManifest {
    actions: Vec<String>,
    objects: Vec<String>,
    matrices: Vec<MatrixEntry>,
    /// Unfiltered image-level occurrence sets the global pair was built from.
    occurrence_sets: Vec<ActionSet>,
}

pub const BANK_MANIFEST: &str = "manifest.json";

/// A bank read back from disk together with the vocabularies and occurrence
/// sets it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredBank {
    pub bank: CoocBank,
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub occurrence_sets: Vec<ActionSet>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn matrix_csv(actions: &[String], values: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = actions.len();
    let to_err = |e: csv::Error| AcpError::contract(format!("csv encoding failed: {e}"));
    w.write_record(actions).map_err(to_err)?;
    for row in values.chunks(n.max(1)) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| AcpError::contract(format!("csv encoding failed: {e}")))
}

fn parse_matrix_csv(text: &str, n: usize, file: &str) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut values = Vec::with_capacity(n * n);
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(|e| AcpError::parse(format!("{file}:row {row}"), e.to_string()))?;
        if record.len() != n {
            return Err(AcpError::parse(
                format!("{file}:row {row}"),
                format!("expected {n} entries, found {}", record.len()),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                AcpError::parse(format!("{file}:row {row}:col {col}"), format!("not a number: {field:?}"))
            })?;
            values.push(v);
        }
    }
    if values.len() != n * n {
        return Err(AcpError::parse(file, format!("expected {n} rows")));
    }
    Ok(values)
}

impl StoredBank {
    pub fn from_corpus(corpus: &AnnotationCorpus) -> Result<Self> {
        let space = corpus.label_space();
        Ok(StoredBank {
            bank: build_bank(corpus)?,
            actions: space.actions().to_vec(),
            objects: space.objects().to_vec(),
            occurrence_sets: corpus.action_occurrence_sets(None),
        })
    }

    /// Writes `cooc_<name>.csv` / `cooc_<name>_comp.csv` for the global pair
    /// and every object, plus the manifest.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut entries = Vec::new();
        let named = std::iter::once((None, "global".to_string(), &self.bank.global)).chain(
            self.bank
                .per_object
                .iter()
                .map(|(&o, pair)| (Some(o), file_stem(&self.objects[o]), pair)),
        );
        for (object, stem, pair) in named {
            let cooc_file = format!("cooc_{stem}.csv");
            let comp_file = format!("cooc_{stem}_comp.csv");
            write_atomic(dir.join(&cooc_file), &matrix_csv(&self.actions, pair.cooc_matrix())?)?;
            write_atomic(dir.join(&comp_file), &matrix_csv(&self.actions, pair.comp_matrix())?)?;
            entries.push(MatrixEntry {
                object,
                name: object.map_or_else(|| "global".to_string(), |o| self.objects[o].clone()),
                cooc_file,
                comp_file,
                row_valid: pair.row_valid.clone(),
                comp_row_valid: pair.comp_row_valid.clone(),
            });
        }
        let manifest = BankManifest {
            actions: self.actions.clone(),
            objects: self.objects.clone(),
            matrices: entries,
            occurrence_sets: self.occurrence_sets.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(dir.join(BANK_MANIFEST), text.as_bytes())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BankManifest = from_json(&read_to_string(dir.join(BANK_MANIFEST))?)?;
        let n = manifest.actions.len();
        let mut global = None;
        let mut per_object = BTreeMap::new();
        for entry in manifest.matrices {
            let cooc = parse_matrix_csv(&read_to_string(dir.join(&entry.cooc_file))?, n, &entry.cooc_file)?;
            let comp = parse_matrix_csv(&read_to_string(dir.join(&entry.comp_file))?, n, &entry.comp_file)?;
            let pair = CoocPair::from_parts(n, cooc, comp, entry.row_valid, entry.comp_row_valid)?;
            match entry.object {
                None => global = Some(pair),
                Some(o) if o < manifest.objects.len() => {
                    per_object.insert(o, pair);
                }
                Some(o) => {
                    return Err(AcpError::validation(BANK_MANIFEST, format!("object {o} out of range")))
                }
            }
        }
        let global = global.ok_or_else(|| AcpError::parse("matrices", "no global entry"))?;
        Ok(StoredBank {
            bank: CoocBank { global, per_object },
            actions: manifest.actions,
            objects: manifest.objects,
            occurrence_sets: manifest.occurrence_sets,
        })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Identity `C` with every row valid: no two actions ever co-occur.
    pub fn exclusive(n: usize) -> CoocPair {
        let mut cooc = vec![0.0; n * n];
        for i in 0..n {
            cooc[i * n + i] = 1.0;
        }
        CoocPair::from_parts(n, cooc, vec![0.5; n * n], vec![true; n], vec![true; n]).unwrap()
    }

    /// Every entry of `C` positive.
    pub fn dense(n: usize) -> CoocPair {
        let mut cooc = vec![0.5; n * n];
        for i in 0..n {
            cooc[i * n + i] = 1.0;
        }
        CoocPair::from_parts(n, cooc, vec![0.5; n * n], vec![true; n], vec![true; n]).unwrap()
    }
}
