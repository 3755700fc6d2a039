//! Core value types: feature and label matrices, binary codes, the category
//! registry and per-round chunks.
//!
//! Every matrix stores one column per instance (or per category).

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued features of one modality, `d × n`, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some((row, col)) = first_non_finite(&values) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self(values))
    }

    /// Builds from row-major values (`rows × cols`).
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    /// Copies the given columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self(self.0.select_columns(cols.iter()))
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Binary multi-label assignments, `c × n`, entries in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix(DMatrix<u8>);

impl LabelMatrix {
    pub fn new(values: DMatrix<u8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            let rows = values.nrows().max(1);
            return Err(Error::InvalidArgument(format!(
                "label entry at ({}, {}) is {}, expected 0 or 1",
                pos % rows,
                pos / rows,
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    /// Builds a label matrix from per-instance lists of category indices.
    pub fn from_label_lists(rows: usize, lists: &[Vec<usize>]) -> Result<Self> {
        let mut m = DMatrix::zeros(rows, lists.len());
        for (j, list) in lists.iter().enumerate() {
            for &c in list {
                if c >= rows {
                    return Err(Error::Dimension(format!(
                        "category {c} out of range for {rows} label rows"
                    )));
                }
                m[(c, j)] = 1;
            }
        }
        Ok(Self(m))
    }

    pub fn values(&self) -> &DMatrix<u8> {
        &self.0
    }

    pub fn categories(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    pub fn get(&self, category: usize, instance: usize) -> bool {
        self.0[(category, instance)] == 1
    }

    /// Category indices carried by instance `j`.
    pub fn labels_of(&self, j: usize) -> Vec<usize> {
        (0..self.0.nrows()).filter(|&c| self.0[(c, j)] == 1).collect()
    }

    /// Columns with no positive entry.
    pub fn unlabeled_columns(&self) -> Vec<usize> {
        (0..self.0.ncols())
            .filter(|&j| self.0.column(j).iter().all(|&v| v == 0))
            .collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self(self.0.select_columns(cols.iter()))
    }

    /// Appends zero rows up to `rows` total rows.
    pub fn pad_rows(&self, rows: usize) -> Self {
        if rows <= self.0.nrows() {
            return self.clone();
        }
        let mut out = DMatrix::zeros(rows, self.0.ncols());
        out.rows_mut(0, self.0.nrows()).copy_from(&self.0);
        Self(out)
    }

    /// Horizontal concatenation; the shorter operand is zero-padded in rows.
    pub fn hconcat(&self, other: &LabelMatrix) -> Self {
        let rows = self.categories().max(other.categories());
        let a = self.pad_rows(rows);
        let b = other.pad_rows(rows);
        let mut out = DMatrix::zeros(rows, a.len() + b.len());
        out.columns_mut(0, a.len()).copy_from(&a.0);
        out.columns_mut(a.len(), b.len()).copy_from(&b.0);
        Self(out)
    }

    /// `true` when instances `a` of `self` and `b` of `other` share a label.
    pub fn shares_label(&self, a: usize, other: &LabelMatrix, b: usize) -> bool {
        let rows = self.categories().min(other.categories());
        (0..rows).any(|c| self.0[(c, a)] == 1 && other.0[(c, b)] == 1)
    }
}

/// Binary codes, `r × n`, entries exactly −1 or +1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix(DMatrix<i8>);

impl CodeMatrix {
    pub fn new(values: DMatrix<i8>) -> Result<Self> {
        if values.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(
                "code entries must be exactly -1 or +1".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn empty(bits: usize) -> Self {
        Self(DMatrix::zeros(bits, 0))
    }

    pub fn values(&self) -> &DMatrix<i8> {
        &self.0
    }

    pub fn bits(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ncols() == 0
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.0.map(f64::from)
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self(self.0.select_columns(cols.iter()))
    }

    pub fn hconcat(&self, other: &CodeMatrix) -> Result<Self> {
        if self.bits() != other.bits() {
            return Err(Error::Dimension(format!(
                "code lengths {} and {}",
                self.bits(),
                other.bits()
            )));
        }
        let mut out = DMatrix::zeros(self.bits(), self.len() + other.len());
        out.columns_mut(0, self.len()).copy_from(&self.0);
        out.columns_mut(self.len(), other.len()).copy_from(&other.0);
        Ok(Self(out))
    }

    pub(crate) fn set_row(&mut self, row: usize, values: &[i8]) {
        for (j, &v) in values.iter().enumerate() {
            self.0[(row, j)] = v;
        }
    }
}

/// Elementwise sign with `sign(0) = +1`.
pub fn sign_quantize(values: &DMatrix<f64>) -> Result<CodeMatrix> {
    if let Some((row, col)) = first_non_finite(values) {
        return Err(Error::NonFinite { row, col });
    }
    Ok(CodeMatrix(values.map(sign)))
}

#[inline]
pub(crate) fn sign(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else {
        1
    }
}

/// Append-only list of category names with the round each first appeared in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegistryRecord", into = "RegistryRecord")]
pub struct CategoryRegistry {
    names: Vec<String>,
    first_seen_round: Vec<u32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RegistryRecord {
    names: Vec<String>,
    first_seen_round: Vec<u32>,
}

impl TryFrom<RegistryRecord> for CategoryRegistry {
    type Error = Error;
    fn try_from(r: RegistryRecord) -> Result<Self> {
        Self::from_parts(r.names, r.first_seen_round)
    }
}

impl From<CategoryRegistry> for RegistryRecord {
    fn from(r: CategoryRegistry) -> Self {
        Self { names: r.names, first_seen_round: r.first_seen_round }
    }
}

impl CategoryRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(names: Vec<String>, first_seen_round: Vec<u32>) -> Result<Self> {
        if names.len() != first_seen_round.len() {
            return Err(Error::State(
                "registry names and rounds have different lengths".into(),
            ));
        }
        let mut reg = Self::new();
        for (name, round) in names.into_iter().zip(first_seen_round) {
            reg.register(&name, round)?;
        }
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn first_seen_rounds(&self) -> &[u32] {
        &self.first_seen_round
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Appends `name`; returns its row index.
    pub fn register(&mut self, name: &str, round: u32) -> Result<usize> {
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument("blank category name".into()));
        }
        if self.index.contains_key(name) {
            return Err(Error::DuplicateCategory(name.to_string()));
        }
        let idx = self.names.len();
        self.names.push(name.to_string());
        self.first_seen_round.push(round);
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Categories first seen before `round`.
    pub fn old_count(&self, round: u32) -> usize {
        self.first_seen_round.iter().filter(|&&r| r < round).count()
    }

    /// Categories first seen in `round`.
    pub fn new_count(&self, round: u32) -> usize {
        self.first_seen_round.iter().filter(|&&r| r == round).count()
    }
}

/// One round of training data.
///
/// `labels` rows are in registry order followed by `new_categories`, so a
/// chunk built for round `t` has `registry.len() + new_categories.len()` rows.
#[derive(Debug, Clone)]
pub struct FeatureChunk {
    pub modalities: Vec<FeatureMatrix>,
    pub labels: LabelMatrix,
    pub new_categories: Vec<String>,
    pub round: u32,
}

impl FeatureChunk {
    /// Builds a chunk from labels indexed by an arbitrary name list, mapping
    /// rows onto the registry and listing unseen names (with at least one
    /// positive instance) as new categories, in the order given.
    pub fn from_named_labels(
        modalities: Vec<FeatureMatrix>,
        labels: &LabelMatrix,
        names: &[String],
        registry: &CategoryRegistry,
        round: u32,
    ) -> Result<Self> {
        if names.len() != labels.categories() {
            return Err(Error::Dimension(format!(
                "{} category names for {} label rows",
                names.len(),
                labels.categories()
            )));
        }
        let n = labels.len();
        let mut new_categories = Vec::new();
        let mut target = Vec::with_capacity(names.len());
        for (row, name) in names.iter().enumerate() {
            let used = (0..n).any(|j| labels.get(row, j));
            match registry.index_of(name) {
                Some(idx) => target.push(Some(idx)),
                None if used => {
                    if new_categories.contains(name) {
                        return Err(Error::DuplicateCategory(name.clone()));
                    }
                    target.push(Some(registry.len() + new_categories.len()));
                    new_categories.push(name.clone());
                }
                None => target.push(None),
            }
        }
        let rows = registry.len() + new_categories.len();
        let mut out = DMatrix::zeros(rows, n);
        for (row, t) in target.iter().enumerate() {
            if let Some(t) = *t {
                for j in 0..n {
                    if labels.get(row, j) {
                        out[(t, j)] = 1;
                    }
                }
            }
        }
        Ok(Self {
            modalities,
            labels: LabelMatrix(out),
            new_categories,
            round,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Lists every violation of the chunk's invariants against `registry`.
/// An empty list means the chunk is consistent.
pub fn validate_chunk(chunk: &FeatureChunk, registry: &CategoryRegistry) -> Vec<String> {
    let mut report = Vec::new();
    let n = chunk.labels.len();
    if chunk.modalities.is_empty() {
        report.push("chunk has no modalities".to_string());
    }
    for (m, x) in chunk.modalities.iter().enumerate() {
        if x.len() != n {
            report.push(format!(
                "column count mismatch: modality {} has {} columns, labels have {}",
                m + 1,
                x.len(),
                n
            ));
        }
        if x.dim() == 0 {
            report.push(format!("modality {} has zero feature rows", m + 1));
        }
        if let Some((r, c)) = first_non_finite(x.values()) {
            report.push(format!(
                "non-finite value in modality {} at ({r}, {c})",
                m + 1
            ));
        }
    }
    let expected_rows = registry.len() + chunk.new_categories.len();
    if chunk.labels.categories() != expected_rows {
        report.push(format!(
            "label rows {} do not match registry size {} plus {} new categories",
            chunk.labels.categories(),
            registry.len(),
            chunk.new_categories.len()
        ));
    }
    for (i, name) in chunk.new_categories.iter().enumerate() {
        if registry.contains(name) || chunk.new_categories[..i].contains(name) {
            report.push(format!("duplicate category name {name:?}"));
        }
        if name.trim().is_empty() {
            report.push("blank category name".to_string());
        }
    }
    for j in chunk.labels.unlabeled_columns() {
        report.push(format!("unlabeled instance at column {j}"));
    }
    report
}
