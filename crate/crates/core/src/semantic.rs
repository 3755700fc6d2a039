//! Per-category supervision vectors.
//!
//! Three providers: a text word-vector file, deterministic pseudo embeddings
//! (hash-seeded unit vectors), and rows of a Sylvester Hadamard matrix.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default embedding dimension for word vectors and pseudo embeddings.
pub const DEFAULT_DIM: usize = 300;

/// Semantic vectors, `k × c`, one column per category in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMatrix {
    pub values: DMatrix<f64>,
    pub provider_id: String,
}

impl SemanticMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

pub trait SemanticProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn id(&self) -> String;

    /// Vector for one category. `index` is the category's registry row.
    fn embed(&self, name: &str, index: usize) -> Result<Vec<f64>>;
}

/// Embeds `names`, the first of which sits at registry row `first_index`.
pub fn embed_categories(
    provider: &dyn SemanticProvider,
    names: &[String],
    first_index: usize,
) -> Result<SemanticMatrix> {
    if names.is_empty() {
        return Err(Error::InvalidArgument("no category names to embed".into()));
    }
    let k = provider.dim();
    let mut values = DMatrix::zeros(k, names.len());
    for (j, name) in names.iter().enumerate() {
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument("blank category name".into()));
        }
        let v = provider.embed(name, first_index + j)?;
        if v.len() != k {
            return Err(Error::Dimension(format!(
                "provider returned {} values, expected {k}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "semantic vector for {name:?} is zero or non-finite"
            )));
        }
        values.column_mut(j).copy_from_slice(&v);
    }
    Ok(SemanticMatrix {
        values,
        provider_id: provider.id(),
    })
}

fn mean_of_words(name: &str, k: usize, mut word: impl FnMut(&str) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let words: Vec<&str> = name.split_whitespace().collect();
    let mut acc = vec![0.0; k];
    for w in &words {
        for (a, v) in acc.iter_mut().zip(word(w)?) {
            *a += v;
        }
    }
    let scale = 1.0 / words.len() as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    Ok(acc)
}

/// Word vectors read from a whitespace-separated text file
/// (`word v1 … vk` per line). A leading `count dim` header line is skipped.
#[derive(Debug, Clone)]
pub struct FileVectors {
    path: PathBuf,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileVectors {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = String::from_utf8(crate::io::read(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: e.utf8_error().valid_up_to() as u64,
            message: "invalid UTF-8".into(),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        let mut offset = 0u64;
        for (lineno, line) in text.lines().enumerate() {
            let line_offset = offset;
            offset += line.len() as u64 + 1;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if lineno == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let vals: Vec<f64> = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    offset: line_offset,
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: line_offset,
                    message: format!("line {}: missing or non-finite vector", lineno + 1),
                });
            }
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        offset: line_offset,
                        message: format!("line {}: {} values, expected {d}", lineno + 1, vals.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(word.to_string(), vals);
        }
        let dim = dim.ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "no word vectors".into(),
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            dim,
            vectors,
        })
    }
}

impl SemanticProvider for FileVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn embed(&self, name: &str, _index: usize) -> Result<Vec<f64>> {
        mean_of_words(name, self.dim, |w| {
            self.vectors
                .get(w)
                .cloned()
                .ok_or_else(|| Error::UnknownWord(w.to_string()))
        })
    }
}

/// Unit-norm Gaussian vector seeded by SHA-256 of `(seed, name)`.
pub fn pseudo_embedding(name: &str, k: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    loop {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone)]
pub struct PseudoProvider {
    pub dim: usize,
    pub seed: u64,
}

impl SemanticProvider for PseudoProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("pseudo:{}:{}", self.seed, self.dim)
    }

    fn embed(&self, name: &str, _index: usize) -> Result<Vec<f64>> {
        mean_of_words(name, self.dim, |w| Ok(pseudo_embedding(w, self.dim, self.seed)))
    }
}

/// Row `index` of the `k × k` Sylvester Hadamard matrix, whose entry
/// `(i, j)` is `(−1)^popcount(i & j)`.
pub fn hadamard_row(index: usize, k: usize) -> Result<Vec<f64>> {
    if !k.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("Hadamard order {k} is not a power of two")));
    }
    if index >= k {
        return Err(Error::HadamardExhausted { index, k });
    }
    Ok((0..k)
        .map(|j| if (index & j).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 })
        .collect())
}

#[derive(Debug, Clone)]
pub struct HadamardProvider {
    pub dim: usize,
}

impl SemanticProvider for HadamardProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hadamard:{}", self.dim)
    }

    fn embed(&self, _name: &str, index: usize) -> Result<Vec<f64>> {
        hadamard_row(index, self.dim)
    }
}

/// Provider selection as given on the command line:
/// `file:<path>`, `pseudo:<seed>[:<k>]` or `hadamard[:<k>]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupervisionSpec {
    File(PathBuf),
    Pseudo { seed: u64, dim: usize },
    /// `None` picks the smallest power of two not below the code length.
    Hadamard { dim: Option<usize> },
}

impl Default for SupervisionSpec {
    fn default() -> Self {
        SupervisionSpec::Pseudo { seed: 0, dim: DEFAULT_DIM }
    }
}

impl SupervisionSpec {
    pub fn build(&self, bits: usize) -> Result<Box<dyn SemanticProvider>> {
        Ok(match self {
            SupervisionSpec::File(p) => Box::new(FileVectors::load(p)?),
            SupervisionSpec::Pseudo { seed, dim } => Box::new(PseudoProvider { dim: *dim, seed: *seed }),
            SupervisionSpec::Hadamard { dim } => {
                let dim = dim.unwrap_or_else(|| bits.max(2).next_power_of_two());
                if !dim.is_power_of_two() {
                    return Err(Error::InvalidArgument(format!(
                        "Hadamard order {dim} is not a power of two"
                    )));
                }
                Box::new(HadamardProvider { dim })
            }
        })
    }
}

impl fmt::Display for SupervisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupervisionSpec::File(p) => write!(f, "file:{}", p.display()),
            SupervisionSpec::Pseudo { seed, dim } => write!(f, "pseudo:{seed}:{dim}"),
            SupervisionSpec::Hadamard { dim: None } => write!(f, "hadamard"),
            SupervisionSpec::Hadamard { dim: Some(k) } => write!(f, "hadamard:{k}"),
        }
    }
}

impl FromStr for SupervisionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized supervision spec {s:?}"));
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(bad());
            }
            return Ok(SupervisionSpec::File(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("pseudo:") {
            let mut it = rest.splitn(2, ':');
            let seed = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let dim = match it.next() {
                Some(d) => d.parse().ok().filter(|&d| d > 0).ok_or_else(bad)?,
                None => DEFAULT_DIM,
            };
            return Ok(SupervisionSpec::Pseudo { seed, dim });
        }
        if s == "hadamard" {
            return Ok(SupervisionSpec::Hadamard { dim: None });
        }
        if let Some(k) = s.strip_prefix("hadamard:") {
            let k: usize = k.parse().map_err(|_| bad())?;
            return Ok(SupervisionSpec::Hadamard { dim: Some(k) });
        }
        Err(bad())
    }
}

impl Serialize for SupervisionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SupervisionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
