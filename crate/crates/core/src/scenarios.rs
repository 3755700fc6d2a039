//! Online protocols as dataset splits, plus a synthetic multi-modal dataset
//! generator.
//!
//! Three protocols are supported:
//! - `iid`: random disjoint chunks, one held-out test set, every category may
//!   appear in every round;
//! - `overlap`: nested, strictly growing category sets per round;
//! - `non_overlap`: pairwise disjoint category sets per round.
//!
//! In the category-incremental protocols an instance's labels are restricted
//! to its round's category set when the round is materialized.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelMatrix};
use crate::error::{Error, Result};
use crate::io::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Iid,
    Overlap,
    NonOverlap,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Iid => "iid",
            ScenarioKind::Overlap => "overlap",
            ScenarioKind::NonOverlap => "non_overlap",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(ScenarioKind::Iid),
            "overlap" => Ok(ScenarioKind::Overlap),
            "non_overlap" | "non-overlap" => Ok(ScenarioKind::NonOverlap),
            _ => Err(Error::InvalidArgument(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Dataset category indices available in this round.
    pub categories: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub rounds: Vec<RoundPlan>,
}

impl ScenarioPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&crate::io::read(path)?)?)
    }

    /// Checks that no instance index is used twice across all rounds and
    /// that every index is below `n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (t, round) in self.rounds.iter().enumerate() {
            for &i in round.train.iter().chain(&round.test) {
                if i >= n {
                    return Err(Error::InvalidArgument(format!(
                        "round {} references instance {i} of {n}",
                        t + 1
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidArgument(format!(
                        "instance {i} is used more than once (round {})",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Labels of `cols`, with every category outside `categories` cleared.
pub fn restrict_labels(labels: &LabelMatrix, cols: &[usize], categories: &[usize]) -> LabelMatrix {
    let keep: BTreeSet<usize> = categories.iter().copied().collect();
    let sub = labels.select_columns(cols);
    let v = DMatrix::from_fn(sub.categories(), sub.len(), |c, j| {
        if keep.contains(&c) {
            sub.values()[(c, j)]
        } else {
            0
        }
    });
    LabelMatrix::new(v).expect("restricting binary labels stays binary")
}

pub fn split_iid(
    n: usize,
    n_categories: usize,
    chunk_sizes: &[usize],
    test_size: usize,
    seed: u64,
) -> Result<ScenarioPlan> {
    let total: usize = chunk_sizes.iter().sum::<usize>() + test_size;
    if total > n {
        return Err(Error::InvalidArgument(format!(
            "chunks and test set need {total} instances, dataset has {n}"
        )));
    }
    if chunk_sizes.is_empty() {
        return Err(Error::InvalidArgument("at least one chunk is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, n, total).into_vec();
    let test = picked[..test_size].to_vec();
    let mut start = test_size;
    let categories: Vec<usize> = (0..n_categories).collect();
    let rounds = chunk_sizes
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let train = picked[start..start + s].to_vec();
            start += s;
            RoundPlan {
                train,
                test: if t == 0 { test.clone() } else { Vec::new() },
                categories: categories.clone(),
            }
        })
        .collect();
    Ok(ScenarioPlan {
        kind: ScenarioKind::Iid,
        seed,
        rounds,
    })
}

/// Category-incremental split with an equal-increment category schedule.
/// `test_fraction` of each round's instances (0.1 for a 9:1 split) is held out.
pub fn split_category_incremental(
    labels: &LabelMatrix,
    n_rounds: usize,
    overlap: bool,
    test_fraction: f64,
    seed: u64,
) -> Result<ScenarioPlan> {
    let c = labels.categories();
    if n_rounds == 0 {
        return Err(Error::InvalidArgument("at least one round is required".into()));
    }
    if c < n_rounds {
        return Err(Error::InvalidArgument(format!(
            "{c} categories cannot give {n_rounds} rounds with a new category each"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);
    let bounds: Vec<usize> = (0..=n_rounds).map(|t| t * c / n_rounds).collect();
    let sets: Vec<Vec<usize>> = (0..n_rounds)
        .map(|t| {
            let from = if overlap { 0 } else { bounds[t] };
            let mut s = perm[from..bounds[t + 1]].to_vec();
            s.sort_unstable();
            s
        })
        .collect();
    // Round in which each category first becomes available.
    let mut intro = vec![0usize; c];
    for t in 0..n_rounds {
        for &cat in &perm[bounds[t]..bounds[t + 1]] {
            intro[cat] = t;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_rounds];
    for j in 0..labels.len() {
        let mut rounds: Vec<usize> = labels.labels_of(j).into_iter().map(|cat| intro[cat]).collect();
        if rounds.is_empty() {
            continue;
        }
        rounds.sort_unstable();
        rounds.dedup();
        let t = if overlap {
            rounds[0]
        } else {
            rounds[rng.random_range(0..rounds.len())]
        };
        members[t].push(j);
    }

    let mut out = Vec::with_capacity(n_rounds);
    for (t, mut m) in members.into_iter().enumerate() {
        m.shuffle(&mut rng);
        let n_test = (m.len() as f64 * test_fraction).round() as usize;
        let test = m[..n_test].to_vec();
        let train = m[n_test..].to_vec();
        if train.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "round {} receives no training instances",
                t + 1
            )));
        }
        out.push(RoundPlan {
            train,
            test,
            categories: sets[t].clone(),
        });
    }
    Ok(ScenarioPlan {
        kind: if overlap { ScenarioKind::Overlap } else { ScenarioKind::NonOverlap },
        seed,
        rounds: out,
    })
}

/// Number of labels drawn per synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelCardinality {
    Fixed { count: usize },
    Uniform { min: usize, max: usize },
}

impl LabelCardinality {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            LabelCardinality::Fixed { count } => count,
            LabelCardinality::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn bounds(&self) -> (usize, usize) {
        match *self {
            LabelCardinality::Fixed { count } => (count, count),
            LabelCardinality::Uniform { min, max } => (min, max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_instances: usize,
    pub n_categories: usize,
    pub dims: Vec<usize>,
    pub latent_dim: usize,
    pub cardinality: LabelCardinality,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    /// When > 1, one modality per instance (chosen at random) gets its noise
    /// multiplied by this factor.
    pub noise_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_instances: 2000,
            n_categories: 12,
            dims: vec![64, 32],
            latent_dim: 16,
            cardinality: LabelCardinality::Uniform { min: 1, max: 3 },
            noise: 0.1,
            noise_ratio: 1.0,
            seed: 0,
        }
    }
}

pub fn category_name(i: usize) -> String {
    format!("category_{i:02}")
}

/// Each category gets a latent Gaussian prototype; an instance's modality-`m`
/// features are a fixed random linear map of the mean of its categories'
/// prototypes plus Gaussian noise.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let (lo, hi) = cfg.cardinality.bounds();
    if cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(Error::InvalidArgument("every modality needs a positive dimension".into()));
    }
    if cfg.n_categories == 0 || lo == 0 || lo > hi || hi > cfg.n_categories {
        return Err(Error::InvalidArgument(format!(
            "label cardinality {lo}..={hi} invalid for {} categories",
            cfg.n_categories
        )));
    }
    if cfg.latent_dim == 0 || !(cfg.noise >= 0.0 && cfg.noise.is_finite()) || !(cfg.noise_ratio.is_finite() && cfg.noise_ratio > 0.0) {
        return Err(Error::InvalidArgument("latent_dim, noise and noise_ratio must be valid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.latent_dim;
    let prototypes = DMatrix::from_fn(l, cfg.n_categories, |_, _| StandardNormal.sample(&mut rng));
    let map_scale = Normal::new(0.0, 1.0 / (l as f64).sqrt()).expect("positive scale");
    let maps: Vec<DMatrix<f64>> = cfg
        .dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, l, |_, _| map_scale.sample(&mut rng)))
        .collect();

    let n = cfg.n_instances;
    let mut label_lists = Vec::with_capacity(n);
    let mut latent = DMatrix::zeros(l, n);
    for j in 0..n {
        let k = cfg.cardinality.sample(&mut rng);
        let mut cats = index::sample(&mut rng, cfg.n_categories, k).into_vec();
        cats.sort_unstable();
        for &c in &cats {
            latent.column_mut(j).axpy(1.0 / k as f64, &prototypes.column(c), 1.0);
        }
        label_lists.push(cats);
    }
    let m = cfg.dims.len();
    let noisy: Vec<Option<usize>> = (0..n)
        .map(|_| (cfg.noise_ratio != 1.0 && m > 1).then(|| rng.random_range(0..m)))
        .collect();
    let mut modalities = Vec::with_capacity(m);
    for (mi, a) in maps.iter().enumerate() {
        let mut x = a * &latent;
        for j in 0..n {
            let sigma = if noisy[j] == Some(mi) { cfg.noise * cfg.noise_ratio } else { cfg.noise };
            if sigma > 0.0 {
                for v in x.column_mut(j).iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * e;
                }
            }
        }
        modalities.push(FeatureMatrix::new(x)?);
    }
    Ok(Dataset {
        modalities,
        labels: LabelMatrix::from_label_lists(cfg.n_categories, &label_lists)?,
        categories: (0..cfg.n_categories).map(category_name).collect(),
    })
}
